import sys

from surplus_reg.cli import main

sys.exit(main())
