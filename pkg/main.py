import sys

from dotenv import load_dotenv

if __name__ == "__main__":
    # Numeric-policy overrides (DICKA_*) are read when `config` is first imported,
    # so the .env file has to be loaded before cli. A missing .env is fine.
    load_dotenv()

    import cli

    sys.exit(cli.main())
