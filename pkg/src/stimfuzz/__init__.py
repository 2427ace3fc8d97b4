"""stimfuzz: coverage-guided safety fuzzing for image-to-stimulation encoders."""

__version__ = "0.1.0"
