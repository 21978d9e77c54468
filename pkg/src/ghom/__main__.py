import sys

from ghom.cli import main

sys.exit(main())
