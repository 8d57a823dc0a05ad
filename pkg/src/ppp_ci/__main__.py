"""Entry point for running ppp_ci as a module."""

from ppp_ci.cli import main

if __name__ == "__main__":
    main()
