#!/usr/bin/env python3
"""Sweep the refinement budget k over a synthetic suite and print the
mean-IoU trend: with the improving-box oracle the curve is non-decreasing
and saturates after a few rounds.
"""

import argparse
from pathlib import Path

from ocsod.agent import AgentConfig
from ocsod.bench import RunConfig, sweep_k
from ocsod.metrics import format_score


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--data", type=Path, default=Path("synthetic"))
    parser.add_argument("--out", type=Path, default=Path("sweep_out"))
    parser.add_argument("--from", dest="k_from", type=int, default=1)
    parser.add_argument("--to", dest="k_to", type=int, default=5)
    args = parser.parse_args()

    config = RunConfig(
        manifest=args.data / "manifest.jsonl",
        output_dir=args.out,
        mllm_backend="oracle:improving",
        segmentor_backend="oracle:gt_clip",
        agent=AgentConfig(),
        image_root=args.data,
        save_traces=False,
    )
    reports = sweep_k(config, args.k_from, args.k_to)
    print("k  gIoU    cIoU")
    for k in sorted(reports):
        row = reports[k].row("overall")
        print(f"{k}  {format_score(row.g_iou):>6}  {format_score(row.c_iou):>6}")


if __name__ == "__main__":
    main()
