"""gridweaver: resilient microgrid planning and assessment toolkit.

Subpackages cover the network data model (netmodel), an exact LP/MILP
solver (solvcore), adjustable interval optimization with column-and-
constraint generation (robust), microgrid partition planning (partition),
data-driven risk scoring (riskdd), mobile storage planning (messplan),
and resilience indices (resindex).  The cli module ties them together.
"""

__version__ = "0.1.0"
