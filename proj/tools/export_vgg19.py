#!/usr/bin/env python3
"""Dump torchvision VGG19 feature weights for the C++ perceptual loss.

The file holds a plain list of tensors (conv weight, conv bias, ...) in
module order, which torch::pickle_load can read without Python classes.
"""
import argparse

import torch
import torchvision


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out", help="output file, e.g. vgg19_features.pt")
    ap.add_argument("--random", action="store_true",
                    help="skip the download and write randomly initialised weights (for testing the loader)")
    args = ap.parse_args()

    if args.random:
        torch.manual_seed(0)
        model = torchvision.models.vgg19(weights=None)
    else:
        model = torchvision.models.vgg19(weights=torchvision.models.VGG19_Weights.IMAGENET1K_V1)
    tensors = [p.detach().clone().contiguous() for p in model.features.parameters()]
    torch.save(tensors, args.out)
    print(f"wrote {len(tensors)} tensors to {args.out}")


if __name__ == "__main__":
    main()
