import sys

from glod.cli import main

sys.exit(main())
