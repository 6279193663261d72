import sys

from qcal.cli import main

sys.exit(main())
