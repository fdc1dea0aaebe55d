import sys

from covertlab.main import main

sys.exit(main())
