# =============================================================================
# core/__init__.py
# =============================================================================
# This package contains ALL numerical logic of the MLMC variational-Bayes
# engine: point streams, level corrections, the Gaussian family, models,
# baselines and the optimisation driver.
#
# ARCHITECTURAL RULE:
#   Nothing in this package imports FastMCP, argparse or dotenv.  Every module
#   here depends on numpy / scipy only, so it can be imported and tested in a
#   bare REPL.  The CLI (main.py) and the MCP server (tools/) are wiring.
#
# DEPENDENCY ORDER (lower never imports higher):
#   errors, numerics → models → qmc → gaussian_family → mlmc, problems,
#   sixcity, optimizers → estimators → baselines → config → engine →
#   diagnostics, report
# =============================================================================
