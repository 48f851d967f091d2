import sys

from vacsec.cli import main

sys.exit(main())
