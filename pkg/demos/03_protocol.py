"""Run the staged no-signalling protocol on a stationary and a coupled source."""

import argparse
from pathlib import Path

from nosignal.config import load_config, protocol_config_from
from nosignal.protocol import run_protocol

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("configs", nargs="*", default=["stationary", "coupled", "witness"])
    args = parser.parse_args()

    for name in args.configs:
        rep = run_protocol(protocol_config_from(load_config(CONFIGS / f"{name}.yaml")))
        print(f"{name}: {rep.overall_verdict}")
        for step in rep.steps:
            rejected = sum(r.rejected for r in step.reports)
            print(f"  {step.name:14} tests={len(step.reports):3} raw rejections={rejected}")


if __name__ == "__main__":
    main()
