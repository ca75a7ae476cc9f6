"""flowgad: benign-only host anomaly ranking from flow logs.

The pipeline turns flow-log CSVs into windowed attributed communication
graphs, trains an edge-aware reconstruction model on benign windows only,
and ranks suspicious hosts from calibrated edge reconstruction
discrepancies.
"""

__version__ = "0.1.0"
