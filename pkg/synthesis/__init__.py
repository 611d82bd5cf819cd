# Melody-conditioned singing synthesis: corpus, model, sampler, rewards, GRPO
