"""End-to-end 3-distinctness detection on small planted/unplanted worlds.

Each instance takes several minutes on one core (accumulate mode, T ~ 2.7e5).
Usage: python3 scripts/kdist_detect.py [n_seeds] [--witness-only]
"""
import sys
import time

from mdqw import kdist as kd

if __name__ == "__main__":
    args = [a for a in sys.argv[1:] if not a.startswith("--")]
    seeds = int(args[0]) if args else 3
    detect = "--witness-only" not in sys.argv
    for seed in range(seeds):
        for plant in (True, False):
            t = time.perf_counter()
            rep = kd.analyze(kd.make_world(seed=seed, plant=plant), run_detect=detect)
            line = f"seed={seed} planted={plant} dim={rep['instance']['dim']} R_T={rep['R_T']:.6f} W_T={rep['W_T']:.3f}"
            if plant:
                line += f" ratio={rep['positive_witness']['ratio']:.3f} P4={rep['flow_conditions']['P4_value']}"
            else:
                line += f" |w_A|^2={rep['negative_witness']['normA2']:.4g}"
            if detect:
                line += f" outcome={rep['outcome']} p0={rep['p0']:.4e} correct={rep['correct']}"
            print(line + f" ({time.perf_counter() - t:.0f}s)", flush=True)
