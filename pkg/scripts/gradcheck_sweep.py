"""Finite-difference gradient errors for every mechanism combination."""

import argparse
import itertools

import torch

from morphopolicy.gradcheck import check_model_gradients
from morphopolicy.policy import PolicyConfig, PolicyModel
from morphopolicy.robots import chain
from morphopolicy.topo_attention import MASK_MODES


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--samples", type=int, default=6, help="entries probed per tensor")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    torch.set_num_threads(1)

    for kt, mode, film in itertools.product([False, True], MASK_MODES, [False, True]):
        cfg = PolicyConfig(d=16, L=2, heads=2, H=8, J_max=4, obs_dim=4, kt_enabled=kt, mask_mode=mode,
                           film_enabled=film, G=2, M_aux=int(kt), adj_init="hard", seed=args.seed)
        errors = check_model_gradients(PolicyModel(cfg), chain(4), seed=args.seed,
                                       samples_per_tensor=args.samples)
        worst = max(errors, key=errors.get)
        print(f"kt={kt!s:5} mask={mode:17s} film={film!s:5} max_rel_err={errors[worst]:.2e} ({worst})")


if __name__ == "__main__":
    main()
