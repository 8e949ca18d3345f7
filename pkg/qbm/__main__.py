import sys

from qbm.cli import main

sys.exit(main())
