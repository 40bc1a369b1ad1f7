"""Auto-regressive state forecaster: attention encoder-decoder base model
with a GRU residual corrector, trained on sliding windows."""
