"""Contiguous regionalization of geo-tagged labeled text.

Pipeline: classify posts -> bin to decimal-precision grid cells ->
partition occupied cells into contiguous attitude-homogeneous regions
(constrained SOM, plus traditional-SOM and polygon baselines) ->
evaluate partition quality -> score mobility traces for exposure
differences between partitions.
"""

__version__ = "0.1.0"
