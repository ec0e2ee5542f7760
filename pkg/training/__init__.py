"""Training, calibration and corpus generation for the reconstruction model."""
