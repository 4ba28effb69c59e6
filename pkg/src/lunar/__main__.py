import sys

from lunar.cli import main

sys.exit(main())
