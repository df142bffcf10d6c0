"""brainalign: layer-wise alignment between model activations and brain responses."""
