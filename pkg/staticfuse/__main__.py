import sys

from staticfuse.app import main

sys.exit(main())
