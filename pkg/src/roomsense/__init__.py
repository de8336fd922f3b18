"""Multi-task indoor scene perception on RGB + sparse lidar.

One shared-backbone network predicts dense depth (self-supervised),
semantic segmentation (distilled from a privileged teacher), 3D object
boxes (voting over a back-projected point cloud with semantic fusion),
and human keypoints, trained jointly on synthetic room sequences.
"""

__version__ = "0.1.0"
