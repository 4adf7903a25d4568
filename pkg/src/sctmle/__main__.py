import sys

from sctmle.cli import main

sys.exit(main())
