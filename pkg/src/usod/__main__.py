import sys

from usod.cli import main

sys.exit(main())
