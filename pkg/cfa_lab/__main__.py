import sys

from cfa_lab.cli import main

sys.exit(main())
