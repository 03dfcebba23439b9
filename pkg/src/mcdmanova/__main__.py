"""Allow running the command line interface as ``python -m mcdmanova``."""

import sys

from .cli import main

sys.exit(main())
