//! Marketable-order execution against a snapshot.

use crate::error::{Error, Result};
use crate::market::types::{DeliveryPeriod, Fill, OrderBookSnapshot, Side};

/// Executes a marketable order for `quantity_mw` of `product` by walking the
/// opposite ladder in price priority. `side` is the side of the incoming
/// order: a `Bid` lifts asks from the cheapest up, an `Ask` hits bids from
/// the dearest down. With `limit` set, ladder levels beyond the limit are
/// left untouched. Partial fills are allowed; fills never exceed resting
/// quantity.
pub fn clear_order(
    snapshot: &OrderBookSnapshot,
    product: &DeliveryPeriod,
    side: Side,
    quantity_mw: f64,
    limit: Option<f64>,
) -> Result<Vec<Fill>> {
    if quantity_mw < 0.0 {
        return Err(Error::domain(format!(
            "negative order quantity {quantity_mw}"
        )));
    }
    let book = snapshot
        .book(product)
        .ok_or_else(|| Error::domain(format!("unknown product starting {}", product.start)))?;
    let ladder = match side {
        Side::Bid => &book.asks,
        Side::Ask => &book.bids,
    };
    let mut remaining = quantity_mw;
    let mut fills = Vec::new();
    for resting in ladder {
        if remaining <= 0.0 {
            break;
        }
        let marketable = match (side, limit) {
            (_, None) => true,
            (Side::Bid, Some(l)) => resting.limit_price <= l,
            (Side::Ask, Some(l)) => resting.limit_price >= l,
        };
        if !marketable {
            break; // ladders are price-sorted, nothing further matches
        }
        let mw = remaining.min(resting.quantity_mw);
        fills.push(Fill {
            order_id: resting.order_id.clone(),
            mw,
            price: resting.limit_price,
        });
        remaining -= mw;
    }
    Ok(fills)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::types::{Order, ProductBook, ProductDuration};
    use chrono::{TimeZone, Utc};

    fn snapshot_with_asks(levels: &[(f64, f64)]) -> (OrderBookSnapshot, DeliveryPeriod) {
        let product = DeliveryPeriod::new(
            Utc.with_ymd_and_hms(2024, 3, 5, 12, 0, 0).unwrap(),
            ProductDuration::Hour,
        )
        .unwrap();
        let mut book = ProductBook::default();
        for (i, (price, qty)) in levels.iter().enumerate() {
            book.asks.push(Order {
                order_id: format!("a{i}"),
                product,
                side: Side::Ask,
                limit_price: *price,
                quantity_mw: *qty,
            });
        }
        let mut snap = OrderBookSnapshot::new(product.start - chrono::Duration::hours(2));
        snap.books.insert(product, book);
        (snap, product)
    }

    #[test]
    fn buy_walks_ask_ladder_within_limit() {
        // 29 MW buy limit 50 against asks (37 EUR, 22 MW) then (45 EUR, 12 MW):
        // 22 MW at 37 and the remaining 7 MW at 45.
        let (snap, product) = snapshot_with_asks(&[(37.0, 22.0), (45.0, 12.0)]);
        let fills = clear_order(&snap, &product, Side::Bid, 29.0, Some(50.0)).unwrap();
        assert_eq!(fills.len(), 2);
        assert_eq!((fills[0].price, fills[0].mw), (37.0, 22.0));
        assert_eq!((fills[1].price, fills[1].mw), (45.0, 7.0));
    }

    #[test]
    fn limit_stops_the_walk() {
        let (snap, product) = snapshot_with_asks(&[(37.0, 22.0), (45.0, 12.0)]);
        let fills = clear_order(&snap, &product, Side::Bid, 29.0, Some(40.0)).unwrap();
        assert_eq!(fills.len(), 1);
        assert_eq!((fills[0].price, fills[0].mw), (37.0, 22.0));
    }

    #[test]
    fn empty_opposite_side_fills_nothing() {
        let (snap, product) = snapshot_with_asks(&[(37.0, 22.0)]);
        let fills = clear_order(&snap, &product, Side::Ask, 5.0, None).unwrap();
        assert!(fills.is_empty());
    }

    #[test]
    fn unknown_product_is_an_error() {
        let (snap, product) = snapshot_with_asks(&[(37.0, 22.0)]);
        let other = DeliveryPeriod::new(
            product.start + chrono::Duration::hours(1),
            ProductDuration::Hour,
        )
        .unwrap();
        assert!(clear_order(&snap, &other, Side::Bid, 1.0, None).is_err());
        assert!(clear_order(&snap, &product, Side::Bid, -1.0, None).is_err());
    }

    #[test]
    fn fills_never_exceed_resting_quantity() {
        let (snap, product) = snapshot_with_asks(&[(37.0, 2.0), (45.0, 3.0)]);
        let fills = clear_order(&snap, &product, Side::Bid, 50.0, None).unwrap();
        let total: f64 = fills.iter().map(|f| f.mw).sum();
        assert_eq!(total, 5.0);
    }
}
