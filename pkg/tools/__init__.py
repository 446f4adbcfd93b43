# =============================================================================
# tools/__init__.py
# =============================================================================
# This package contains the FastMCP tool wrappers around core/.
#
# ARCHITECTURAL ROLE:
#   tools/ is the translation layer between an MCP client and the engine.
#   Each tool:
#     1. Parses its arguments into core/ config objects
#     2. Calls core/ (run, estimate_elbo, rates_table, variance_table, abc_ar)
#     3. Writes large outputs to CSV/JSON and returns paths plus a short
#        numeric summary, never whole traces
#     4. Turns MlmcVbError into {"error", "hint"} dicts
#
# WHAT TOOLS DO NOT DO:
#   - They do NOT contain numerics (that's in core/)
#   - They do NOT hold state between calls
# =============================================================================
