import sys

from qql.cli import main

sys.exit(main())
