"""Smoke test for the dpagg_py extension.

Build and install first:  pip install --no-build-isolation ./crates/py
"""

import json

import dpagg_py as dp


def main():
    params = dp.AheParams(degree=64, max_adds=16)
    pk, sk = dp.keygen(params, seed=1)
    x = [0.25, -1.5, 3.0]
    y = [1.0, 0.5, -0.75]
    ct = dp.encrypt(pk, dp.encode(2, x, params), params, seed=2)
    ct = ct.add(dp.encrypt(pk, dp.encode(2, y, params), params, seed=3), params)
    assert len(ct.to_bytes(params)) == params.ciphertext_bytes
    got = dp.decrypt(sk, ct, params).decode()
    want = [a + b for a, b in zip(x, y)]
    assert all(abs(g - w) < 2 / params.scale for g, w in zip(got, want)), got[:3]

    shares = dp.share([5, 17, 42], c=7, a=2, q=97, seed=4)
    assert shares.reconstruct([2, 5, 7]) == [5, 17, 42]
    assert shares.verify(3, shares.member_shares(3))

    assert abs(dp.failure_prob(0.03, 1 / 7, 280) - 4.1e-14) / 4.1e-14 < 0.1
    assert dp.epsilon_for(2, 0.05, 1.1, 1e-5) > dp.epsilon_for(1, 0.05, 1.1, 1e-5)

    cfg = json.loads(dp.desk_config())
    cfg.update(rounds=1)
    cfg["population"]["w"] = 500
    cfg["dp"]["delta_target"] = 1e-4
    for name in ("master", "decryption"):
        cfg["committees"][name] = {"c": 7, "a": 3}
    cfg["committees"]["dp_noise"] = {"c": 7, "a": 3, "b_off": 0}
    cfg["committees"]["num_decryption_committees"] = 1
    cfg["committees"]["enforce_union_bound"] = False
    cfg["ahe"]["degree"] = 64
    cfg["model"]["dim"] = 40
    (report,) = [json.loads(r) for r in dp.run(json.dumps(cfg))]
    assert report["aggregate"]["exact_match"]
    assert not report["detections"]
    print("dpagg_py smoke test ok: round", report["round_t"], "epsilon", round(report["privacy"]["epsilon"], 3))


if __name__ == "__main__":
    main()
