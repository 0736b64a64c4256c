#!/usr/bin/env python3
"""Regenerate the desk-scale BAAC-shaped fixtures under fixtures/.

The output is fully determined by the seed below. Marginal counts for the
columns the tests pin (year, month, day, weather, road category, gradient)
are fixed exactly; everything else is drawn from the seeded generator.

Usage: python3 tools/gen_fixtures.py [fixtures-dir]
"""

import csv
import os
import random
import sys

SEED = 20230614


def spread(counts, rng):
    """Expand a {code: count} mapping into a shuffled list of codes."""
    values = [code for code, n in counts.items() for _ in range(n)]
    rng.shuffle(values)
    return values


def main(out_dir):
    rng = random.Random(SEED)
    n_acc = 200

    years = [2016] * 60 + [2017] * 52 + [2018] * 46 + [2019] * 42
    month_counts = [14, 13, 15, 16, 18, 19, 24, 17, 18, 17, 15, 14]
    months = spread({m + 1: c for m, c in enumerate(month_counts)}, rng)
    day_counts = {d: (7 if d <= 18 else 6) for d in range(1, 31)}
    day_counts[31] = 2
    days = spread(day_counts, rng)
    atm = spread({-1: 7, 1: 124, 2: 25, 3: 12, 4: 6, 5: 5, 6: 4, 7: 3, 8: 10, 9: 4}, rng)
    lum = spread({-1: 3, 1: 120, 2: 15, 3: 20, 4: 5, 5: 37}, rng)
    agg = spread({1: 70, 2: 130}, rng)
    inter = spread({-1: 5, 1: 110, 2: 30, 3: 25, 4: 5, 6: 10, 9: 15}, rng)
    col = spread({-1: 5, 1: 20, 2: 30, 3: 40, 4: 10, 5: 5, 6: 60, 7: 30}, rng)

    ids = []
    per_year_seq = {}
    for y in years:
        per_year_seq[y] = per_year_seq.get(y, 0) + 1
        ids.append(y * 100000000 + per_year_seq[y])

    with open(os.path.join(out_dir, "characteristics.csv"), "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["Num_Acc", "an", "mois", "jour", "hrmn", "lum", "agg", "int", "atm",
                    "col", "com", "adr", "gps", "lat", "long", "dep"])
        for i in range(n_acc):
            hrmn = "%02d%02d" % (rng.randrange(24), rng.randrange(60))
            com = rng.choice(["75056", "69123", "13055", "31555", "2A004", "59350"])
            adr = rng.choice(["", "RUE DE LA PAIX", "AVENUE JEAN JAURES", "RN 7", "D 906"])
            lat = "%.5f" % rng.uniform(42.5, 50.5)
            lon = "%.5f" % rng.uniform(-4.5, 7.5)
            dep = com[:2] + "0"
            w.writerow([ids[i], years[i], months[i], days[i], hrmn, lum[i], agg[i],
                        inter[i], atm[i], col[i], com, adr, "M", lat, lon, dep])

    catr = spread({1: 15, 2: 10, 3: 60, 4: 95, 5: 3, 6: 5, 7: 2, 9: 10}, rng)
    circ = spread({-1: 8, 1: 50, 2: 130, 3: 12}, rng)
    surf = spread({-1: 4, 1: 150, 2: 35, 3: 2, 5: 3, 7: 4, 9: 2}, rng)
    plan = spread({-1: 6, 1: 140, 2: 25, 3: 22, 4: 7}, rng)
    vosp = spread({-1: 10, 0: 170, 1: 10, 2: 6, 3: 4}, rng)
    prof = spread({-1: 9, 1: 140, 2: 35, 3: 9, 4: 7}, rng)
    situ = spread({-1: 3, 0: 2, 1: 170, 2: 5, 3: 10, 4: 5, 5: 5}, rng)

    with open(os.path.join(out_dir, "places.csv"), "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["Num_Acc", "voie", "V1", "V2", "catr", "circ", "surf", "plan", "vosp",
                    "prof", "env1", "nbv", "pr", "pr1", "lartpc", "situ"])
        for i in range(n_acc):
            voie = rng.choice(["", "7", "906", "PERIPHERIQUE", "A6"])
            v1 = rng.choice([0, 0, 0, 1, 2])
            v2 = rng.choice(["", "", "A", "B"])
            env1 = rng.choice([30, 50, 50, 50, 70, 80, 80, 90, 110, 130])
            nbv = rng.choice([-1, 1, 2, 2, 2, 3, 4])
            pr = rng.choice(["", "-1", "12", "(1)"])
            pr1 = rng.choice(["", "-1", "350", "(1)"])
            lartpc = rng.choice(["", "", "0", "2.5"])
            w.writerow([ids[i], voie, v1, v2, catr[i], circ[i], surf[i], plan[i], vosp[i],
                        prof[i], env1, nbv, pr, pr1, lartpc, situ[i]])

    vehicles = []
    users = []
    for i in range(n_acc):
        n_veh = 1 if rng.random() < 0.45 else 2
        for v in range(n_veh):
            num_veh = "%s01" % "ABC"[v]
            catv = rng.choice([7, 7, 7, 7, 7, 1, 2, 10, 33, 30, 38, 99, 14])
            vehicles.append([
                ids[i], rng.choice([-1, 0, 1, 1, 2, 2, 3]), rng.choice([0, 0, 0, 0, 1, 12]),
                num_veh, catv, rng.choice([-1, 0, 0, 0, 1, 2, 8, 13, 16]),
                rng.choice([-1, 0, 1, 2, 2, 2, 4, 6, 9]), rng.choice([-1, 0, 1, 2, 3, 4, 7, 8, 9]),
            ])
            n_occ = 1 if rng.random() < 0.7 else 2
            for o in range(n_occ):
                catu = 1 if o == 0 else 2
                place = 1 if o == 0 else rng.choice([2, 3, 4])
                users.append(make_user(rng, ids[i], num_veh, catu, place))
        if rng.random() < 0.12:
            users.append(make_user(rng, ids[i], "A01", 3, 10))

    with open(os.path.join(out_dir, "vehicles.csv"), "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["Num_Acc", "senc", "occutc", "num_veh", "catv", "obs", "obsm", "choc"])
        w.writerows(vehicles)

    # users.csv mirrors the yearly BAAC layout: semicolon separated and quoted.
    with open(os.path.join(out_dir, "users.csv"), "w", newline="") as f:
        w = csv.writer(f, delimiter=";", quoting=csv.QUOTE_ALL, lineterminator="\n")
        w.writerow(["Num_Acc", "num_veh", "place", "catu", "grav", "sexe", "an_nais",
                    "trajet", "secu", "locp", "actp", "etatp"])
        w.writerows(users)


def make_user(rng, acc, num_veh, catu, place):
    pedestrian = catu == 3
    grav = rng.choice([1, 1, 1, 4, 4, 4, 3, 3, 2]) if not pedestrian else rng.choice([4, 3, 3, 2])
    sexe = rng.choice([1, 1, 1, 2, 2, -1]) if rng.random() < 0.97 else -1
    an_nais = rng.randrange(1935, 2006) if rng.random() < 0.96 else ""
    trajet = rng.choice([-1, 0, 1, 1, 2, 3, 4, 5, 5, 9])
    secu = rng.choice([-1, 0, 1, 1, 1, 1, 2, 2, 3, 8, 9]) if not pedestrian else rng.choice([0, -1, 9])
    locp = rng.choice([1, 2, 3, 4, 5, 9]) if pedestrian else rng.choice([-1, 0, 0])
    actp = rng.choice([1, 2, 3, 3, 4, 5, 9]) if pedestrian else rng.choice([-1, 0, 0])
    etatp = rng.choice([1, 1, 2, 3]) if pedestrian else -1
    return [acc, num_veh, place, catu, grav, sexe, an_nais, trajet, secu, locp, actp, etatp]


if __name__ == "__main__":
    out = sys.argv[1] if len(sys.argv) > 1 else os.path.join(os.path.dirname(__file__), "..", "fixtures")
    os.makedirs(out, exist_ok=True)
    main(out)
