"""voxseg: a desk-scale workbench for fully-volumetric brain-MRI segmentation."""

__version__ = "0.1.0"
