"""
Main entry point for SparseAccBench

Loads the .env file and hands the command line to bench_cli, which sets up
logging from --log-level or SPARSEACC_LOG_LEVEL.

@version 0.1.0
@date October 2026
"""
import sys

from dotenv import load_dotenv, find_dotenv

load_dotenv(find_dotenv())

import bench_cli  # noqa: E402


def run():
    """Run the command line and exit with its code."""
    sys.exit(bench_cli.main(sys.argv[1:]))


if __name__ == "__main__":
    run()
