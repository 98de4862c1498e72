"""Korean singing voice acoustic model."""
