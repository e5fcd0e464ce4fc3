"""retsyn: class-conditional style-based retinal image synthesis with
closed-form latent editing, plus the grading/detection evaluation pipeline."""

__version__ = "0.1.0"
