"""Class prototype generation and activation path similarity for image classifiers."""
