"""Domain services: confidence channels, simulated world, designer and evaluator."""
