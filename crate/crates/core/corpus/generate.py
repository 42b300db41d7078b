"""Regenerates the corpus CSV files and prints observed key frequencies.

Run from this directory: python3 generate.py
"""
import csv
import math
import random
from collections import Counter

rng = random.Random(20240611)

CITIES = [(1, "Oslo", "north"), (2, "Bergen", "north"), (3, "Tromso", "north"), (4, "Lisbon", "south"),
          (5, "Porto", "south"), (6, "Seville", "south"), (7, "Malaga", "south"), (8, "Bodo", "north")]
DAYS = ["Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun"]


def write(name, header, rows):
    with open(f"data/{name}.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


drivers = [(i, rng.choice([1, 1, 2, 3, 4, 4, 5, 6, 7]), round(rng.uniform(3.5, 5.0), 2),
            rng.choice(["sedan", "van", "bike"])) for i in range(40)]
riders = [(i, rng.choice([1, 2, 2, 3, 4, 5, 5, 6, 8]), rng.randint(18, 75)) for i in range(60)]
promos = [(i + 1, c, round(rng.uniform(0.05, 0.4), 2)) for i, c in enumerate([1, 1, 2, 3, 3, 3, 4, 5, 5, 2])]
shifts = [(i + 1, rng.randint(1, 7), rng.randrange(40), rng.randint(4, 10)) for i in range(90)]

driver_weights = [1 + (i % 5) for i in range(40)]
trips = []
for t in range(600):
    driver = rng.choices(range(40), weights=driver_weights)[0]
    rider = rng.randrange(60)
    city = rng.choices([1, 2, 3, 4, 5, 6], weights=[5, 3, 1, 4, 2, 2])[0]
    day = rng.randint(1, 7)
    kind = rng.choices(["pool", "solo", "xl"], weights=[3, 5, 1])[0]
    distance = round(min(30.0, math.exp(rng.gauss(1.3, 0.6))), 2)
    duration = max(3, int(distance * rng.uniform(2.0, 4.0)) + rng.randint(0, 6))
    fare = round(2.5 + 1.4 * distance + 0.2 * duration, 2)
    trips.append((t + 1, driver, rider, city, day, kind, distance, duration, fare))

write("trips", ["trip_id", "driver_id", "rider_id", "city_id", "day", "kind", "distance", "duration", "fare"], trips)
write("drivers", ["id", "city_id", "rating", "vehicle"], drivers)
write("riders", ["id", "city_id", "age"], riders)
write("cities", ["city_id", "name", "region"], CITIES)
write("days", ["day", "name"], [(i + 1, d) for i, d in enumerate(DAYS)])
write("promos", ["promo_id", "city_id", "discount"], promos)
write("shifts", ["shift_id", "day", "driver_id", "hours"], shifts)

for label, values in [("trips.driver_id", [r[1] for r in trips]), ("trips.rider_id", [r[2] for r in trips]),
                      ("trips.city_id", [r[3] for r in trips]), ("trips.day", [r[4] for r in trips]),
                      ("drivers.city_id", [r[1] for r in drivers]), ("riders.city_id", [r[1] for r in riders]),
                      ("promos.city_id", [r[1] for r in promos]), ("shifts.day", [r[1] for r in shifts]),
                      ("shifts.driver_id", [r[2] for r in shifts])]:
    print(label, max(Counter(values).values()))
