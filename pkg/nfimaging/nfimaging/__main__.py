import sys

from nfimaging.cli import main

sys.exit(main())
