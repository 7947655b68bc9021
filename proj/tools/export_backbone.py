#!/usr/bin/env python3
"""Export a ResNet50 backbone to ONNX with intermediate activations tapped.

The exported graph exposes two named outputs that follow the Keras layer
naming used by the identification pipeline:

  activation_40  output of the last residual block of stage 4 (stride 16)
  activation_43  output of the first residual block of stage 5 (stride 32)

Usage:
  python3 tools/export_backbone.py --out resnet50_taps.onnx [--random-weights]

Pretrained ImageNet weights are downloaded by torchvision unless
--random-weights is given. The torchvision network expects "torch"
normalization (set "normalization": "torch" in the pipeline config).
"""
import argparse

import torch
import torchvision


class TappedResNet50(torch.nn.Module):
    def __init__(self, net):
        super().__init__()
        self.net = net

    def forward(self, x):
        n = self.net
        x = n.maxpool(n.relu(n.bn1(n.conv1(x))))
        x = n.layer3(n.layer2(n.layer1(x)))
        act40 = x
        act43 = n.layer4[0](x)
        return act40, act43


def inline_identity_initializers(path):
    """Replace Identity nodes that alias initializers with copies.

    torch deduplicates equal parameters (common with random weights) into
    Identity nodes, which some ONNX importers (OpenCV dnn 4.5) reject.
    """
    import onnx

    model = onnx.load(path)
    inits = {t.name: t for t in model.graph.initializer}
    keep = []
    for node in model.graph.node:
        if node.op_type == "Identity" and node.input[0] in inits:
            copy = onnx.TensorProto()
            copy.CopyFrom(inits[node.input[0]])
            copy.name = node.output[0]
            model.graph.initializer.append(copy)
        else:
            keep.append(node)
    del model.graph.node[:]
    model.graph.node.extend(keep)
    onnx.save(model, path)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", required=True)
    parser.add_argument("--resolution", type=int, default=512)
    parser.add_argument("--random-weights", action="store_true")
    parser.add_argument("--print-shapes", action="store_true")
    args = parser.parse_args()

    weights = None if args.random_weights else "IMAGENET1K_V1"
    torch.manual_seed(0)
    model = TappedResNet50(torchvision.models.resnet50(weights=weights)).eval()
    dummy = torch.zeros(1, 3, args.resolution, args.resolution)
    if args.print_shapes:
        with torch.no_grad():
            for res in (256, 512):
                a40, a43 = model(torch.zeros(1, 3, res, res))
                print(f"{res}: activation_40 {tuple(a40.shape)} activation_43 {tuple(a43.shape)}")
    torch.onnx.export(
        model,
        dummy,
        args.out,
        input_names=["input"],
        output_names=["activation_40", "activation_43"],
        opset_version=11,
        dynamo=False,
    )
    inline_identity_initializers(args.out)


if __name__ == "__main__":
    main()
