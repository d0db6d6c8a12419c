"""Point network: autodiff core, model, optimizer, training, checkpoints."""
