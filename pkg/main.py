import sys

from logic.logging_utils import configure_logging
from ui.main import main

if __name__ == "__main__":

    configure_logging()
    sys.exit(main())
