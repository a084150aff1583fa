def lr_at(epoch: int, cfg) -> float:
    """分段常数学习率：每越过一个衰减轮次乘一次 lr_decay_factor"""
    if epoch < 0:
        raise ValueError(f"epoch 不能为负: {epoch}")
    passed = sum(1 for boundary in cfg.lr_decay_epochs if epoch >= boundary)
    return cfg.lr_base * cfg.lr_decay_factor**passed
