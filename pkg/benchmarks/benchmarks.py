# Write the benchmarking functions here.
# See "Writing benchmarks" in the asv docs for more information.

from staticfuse import sim
from staticfuse.engine import Engine, Mode


class TimeEngineSuite:
    params = [[1000, 4000], [m.value for m in Mode]]
    param_names = ["n_detections", "method"]

    def setup(self, n_detections, method):
        sensors = sim.load_sensor_specs()
        truth = sim.scaled_scenario(n_detections, sensors, 0)  # Same seed for all runs
        self.detections = sim.simulate(truth, sensors, 0)[:n_detections]
        self.engine = Engine(mode=method)
        self.engine.update_many(self.detections)

    def time_update(self, n_detections, method):
        Engine(mode=method).update_many(self.detections)

    def time_recluster(self, n_detections, method):
        self.engine.clone().recluster()

    def peakmem_update(self, n_detections, method):
        Engine(mode=method).update_many(self.detections)
