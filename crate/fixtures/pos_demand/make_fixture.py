"""Regenerates sales.csv, the synthetic point-of-sale demand fixture.

Ten weeks of 100 rows. Log demand is an additive function of the trade
category behind the free-text POS description, the product, price and a
promotion flag, plus Gaussian noise with standard deviation 0.1:

    ln(demand + 1) = cat[c] + prod[p] - 0.12 * (price - 12) + 0.35 * promo
                     + 0.05 * sin(week) + N(0, 0.1^2)

Rows of weeks 9 and 10 carry a few empty price cells to exercise null
handling. Usage: python3 make_fixture.py > sales.csv
"""

import csv
import math
import random
import sys

SEED = 20240611

DESCRIPTIONS = {
    "Supermarket": [
        "SUPERMERCADO LA ESTRELLA",
        "SUPERMERCADO EL SOL",
        "SUPERMERCADOS DEL NORTE",
        "MINI SUPER LA PALMA",
    ],
    "Convenience": [
        "TIENDA DE CONVENIENCIA 24H",
        "MISCELANEA LOS PINOS",
        "ABARROTES DON JOSE",
    ],
    "University": [
        "CAFETERIA UNIVERSIDAD CENTRAL",
        "UNIVERSIDAD DEL VALLE TIENDA",
    ],
    "Pharmacy": [
        "FARMACIA SAN PABLO",
        "FARMACIAS LA SALUD",
    ],
    "Restaurant": [
        "RESTAURANTE EL FOGON",
        "TAQUERIA LOS GUEROS",
    ],
    "OTHER": [
        "LOCAL 14 ESQUINA",
        "PUESTO MERCADO",
    ],
}

CATEGORY_LEVEL = {
    "Supermarket": 3.2,
    "Convenience": 2.4,
    "University": 1.9,
    "Pharmacy": 1.5,
    "Restaurant": 2.1,
    "OTHER": 1.2,
}

PRODUCTS = {"bread_white": 0.6, "bread_wheat": 0.2, "cakes": -0.3, "tortillas": 0.9}


def main():
    rng = random.Random(SEED)
    out = csv.writer(sys.stdout, lineterminator="\n")
    out.writerow(["week", "pos_description", "product", "price", "promo", "returns", "demand"])
    categories = sorted(DESCRIPTIONS)
    products = sorted(PRODUCTS)
    for week in range(1, 11):
        for row in range(100):
            cat = categories[rng.randrange(len(categories))]
            desc = DESCRIPTIONS[cat][rng.randrange(len(DESCRIPTIONS[cat]))]
            prod = products[rng.randrange(len(products))]
            price = round(rng.uniform(6.0, 18.0), 2)
            promo = 1 if rng.random() < 0.25 else 0
            z = (
                CATEGORY_LEVEL[cat]
                + PRODUCTS[prod]
                - 0.12 * (price - 12.0)
                + 0.35 * promo
                + 0.05 * math.sin(week)
                + rng.gauss(0.0, 0.1)
            )
            demand = max(math.expm1(z), 0.0)
            returns = round(0.04 * demand + rng.uniform(0.0, 0.5), 2)
            price_cell = "" if week >= 9 and row % 37 == 5 else f"{price:.2f}"
            out.writerow([week, desc, prod, price_cell, promo, f"{returns:.2f}", f"{demand:.4f}"])


if __name__ == "__main__":
    main()
