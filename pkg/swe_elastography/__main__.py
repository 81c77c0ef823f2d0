import sys

from swe_elastography.cli import main

sys.exit(main())
