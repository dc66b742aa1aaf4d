"""Runs episodes against a marsim episode server with a fixed steering policy.

    python3 rollout.py --port 7300 --episodes 10
"""

import argparse
import sys

from marsim_client import Client


def policy(obs, actions):
    # Full thrust, rudder proportional to heading error, elevator neutral.
    act = [0.0] * len(actions)
    act[0] = actions[0]["high"]
    if len(actions) > 1:
        lo, hi = actions[1]["low"], actions[1]["high"]
        act[1] = max(lo, min(hi, obs[7]))
    return act


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--host", default="127.0.0.1")
    ap.add_argument("--port", type=int, default=7300)
    ap.add_argument("--episodes", type=int, default=10)
    args = ap.parse_args()

    with Client(args.host, args.port) as c:
        spec = c.spec()
        n = spec["n_envs"]
        finished = 0
        total = 0.0
        seed = 0
        while finished < args.episodes:
            obs = c.reset(seeds=list(range(seed, seed + n)))
            seed += n
            done = [False] * n
            returns = [0.0] * n
            while not all(done):
                out = c.step([policy(o, spec["actions"]) for o in obs])
                obs = out["obs"]
                for i in range(n):
                    if not done[i]:
                        returns[i] += out["reward"][i]
                        done[i] = out["done"][i]
                if any(done) and not all(done):
                    # Finished envs reject further steps; restart the batch.
                    break
            completed = [r for r, d in zip(returns, done) if d]
            finished += len(completed)
            total += sum(completed)
        print(f"episodes={finished} mean_return={total / max(finished, 1):.3f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
