import sys

from ptln.cli import main

sys.exit(main())
