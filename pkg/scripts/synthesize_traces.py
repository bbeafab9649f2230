"""Write a training trace CSV (and optionally a generated workload) for a device file."""
import argparse
import sys
from pathlib import Path

parent_dir = Path(__file__).parent.parent
sys.path.insert(0, str(parent_dir))

from cli.config import load_devices
from sim.corpus import synthesize_traces
from sim.workload import generate_workload, write_workload

parser = argparse.ArgumentParser(description=__doc__)
parser.add_argument("--devices", default=str(parent_dir / "data" / "devices.json"))
parser.add_argument("--out", default=str(parent_dir / "data" / "traces.csv"))
parser.add_argument("--samples", type=int, default=60, help="Samples per (device, action)")
parser.add_argument("--seed", type=int, default=0)
parser.add_argument("--workload", help="Also write a generated workload to this path")
parser.add_argument("--routines", type=int, default=100)
parser.add_argument("--horizon", type=float, default=1800.0)
parser.add_argument("--arrivals", choices=["random", "random_bursty"], default="random_bursty")
args = parser.parse_args()

devices = load_devices(args.devices)
print(f"Synthesizing traces for {len(devices)} devices...")
rows = synthesize_traces(args.out, devices, samples_per_key=args.samples, seed=args.seed)
print(f"  ✓ Wrote {rows} rows to {args.out}")

if args.workload:
    workload = generate_workload(devices, args.routines, args.arrivals, args.horizon, seed=args.seed)
    write_workload(args.workload, workload)
    print(f"  ✓ Wrote {len(workload.routines)} routines to {args.workload}")
