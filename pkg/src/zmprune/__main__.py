import sys

from zmprune.cli import main

sys.exit(main())
