"""Fit the 2-64-64-2 sigmoid network used by the NN Pendulum benchmark.

The target is one explicit Euler step of a damped pendulum.  Training adds a
penalty on the product of layer spectral norms (times 1/4 per hidden layer),
which is the Lipschitz bound the propagation code uses, so that the shipped
network has a usable global bound.

    python3 scripts/train_pendulum_nn.py --out src/wassprop/data/nn_pendulum.json
"""

import argparse
import json

import torch

GRAVITY_OVER_LENGTH = 1.0
DAMPING = 0.5
STEP = 0.1


def pendulum(x):
    theta, omega = x[:, 0], x[:, 1]
    return torch.stack([
        theta + STEP * omega,
        omega + STEP * (-GRAVITY_OVER_LENGTH * torch.sin(theta) - DAMPING * omega),
    ], dim=1)


def lipschitz_bound(layers):
    norms = [torch.linalg.matrix_norm(l.weight, 2) for l in layers]
    return torch.stack(norms).prod() * 0.25 ** (len(layers) - 1)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=6000)
    ap.add_argument("--target", type=float, default=1.08, help="Lipschitz bound to aim for")
    ap.add_argument("--penalty", type=float, default=1.0)
    args = ap.parse_args()

    torch.manual_seed(args.seed)
    torch.set_default_dtype(torch.float64)
    layers = [torch.nn.Linear(2, 64), torch.nn.Linear(64, 64), torch.nn.Linear(64, 2)]
    net = torch.nn.Sequential(layers[0], torch.nn.Sigmoid(), layers[1], torch.nn.Sigmoid(), layers[2])
    x = torch.empty(20000, 2).uniform_(-3.0, 3.0)
    y = pendulum(x)
    opt = torch.optim.Adam(net.parameters(), lr=3e-3)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, args.epochs)
    for epoch in range(args.epochs):
        opt.zero_grad()
        fit = torch.mean((net(x) - y) ** 2)
        lip = lipschitz_bound(layers)
        loss = fit + args.penalty * torch.relu(lip - args.target) ** 2
        loss.backward()
        opt.step()
        sched.step()
        if epoch % 500 == 0 or epoch == args.epochs - 1:
            print(f"epoch {epoch:5d}  mse {fit.item():.3e}  lipschitz {lip.item():.4f}")

    payload = {
        "description": "2-64-64-2 sigmoid MLP fitted to a damped pendulum Euler step "
                       f"(g/l={GRAVITY_OVER_LENGTH}, damping={DAMPING}, dt={STEP})",
        "layers": [{"W": l.weight.detach().tolist(), "b": l.bias.detach().tolist()} for l in layers],
    }
    with open(args.out, "w") as fh:
        json.dump(payload, fh)


if __name__ == "__main__":
    main()
