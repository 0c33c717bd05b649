import sys

from trafficclean.cli import main

sys.exit(main())
