"""
Classical label fusion baselines: mean, majority vote, STAPLE and windowed
spatial STAPLE.
"""

from fusion.spatial_staple import spatial_staple
from fusion.staple import StapleResult, staple
from fusion.voting import majority_vote, mean_fusion

__all__ = ["StapleResult", "majority_vote", "mean_fusion", "spatial_staple", "staple"]
