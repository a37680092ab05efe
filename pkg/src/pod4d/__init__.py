"""Predictive object detection toolkit for FMCW LiDAR.

Doppler-aware simulation, ego-motion compensation, virtual future points,
4D voxelization, sparse 4D convolution and windowed set attention encoders,
BEV maps, a geometric box decoder and KITTI-style evaluation.
"""

__version__ = "0.1.0"
