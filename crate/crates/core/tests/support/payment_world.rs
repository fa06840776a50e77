use bandx_core::credential::{parse_credential, SigningKey};
use bandx_core::market::{Link, Offer, OfferTerms};
use bandx_core::money::{Currency, Money};
use bandx_core::payments::*;
use bandx_core::time::Date;
use rand::seq::SliceRandom;
use rand::Rng;

/// How a generated record is expected to fare on its first deposit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Valid,
    OverLimit,
    Underpaid,
    UnknownGuarantor,
    Forged,
}

pub struct Payer {
    pub book: CheckBook,
    pub guarantor: GuarantorCredential,
    pub trusted: bool,
}

pub struct World {
    pub csc_key: SigningKey,
    pub registry: GuarantorRegistry,
    pub payers: Vec<Payer>,
    pub offers: Vec<Offer>,
    pub attacker: CheckBook,
    pub today: Date,
}

pub fn currency_of(i: usize) -> Currency {
    if i % 2 == 0 {
        Currency::usd()
    } else {
        Currency::new("EUR").unwrap()
    }
}

impl World {
    pub fn new(tag: &str) -> World {
        let today: Date = "20031110".parse().unwrap();
        let expiry = today.add_days(30);
        let trusted: Vec<SigningKey> = (0..2).map(|i| SigningKey::derive(&format!("{tag}/cg{i}"))).collect();
        let rogue = SigningKey::derive(&format!("{tag}/rogue-cg"));
        let mut registry = GuarantorRegistry::new();
        for g in &trusted {
            registry.add(g.public_id());
        }
        let mut payers = Vec::new();
        for i in 0..5 {
            let book = CheckBook::new(SigningKey::derive(&format!("{tag}/payer{i}")));
            let is_trusted = i != 4;
            let issuer = if is_trusted { &trusted[i % 2] } else { &rogue };
            let limit = Money::from_minor(500, currency_of(i));
            let guarantor =
                issue_guarantor_credential(issuer, &book.payer_key(), &limit, expiry, today).unwrap();
            payers.push(Payer { book, guarantor, trusted: is_trusted });
        }
        let mut offers = Vec::new();
        for m in 0..3 {
            let isp = SigningKey::derive(&format!("{tag}/isp{m}"));
            for c in 0..2 {
                let terms = OfferTerms::new(
                    Link::new(&format!("X{m}"), &format!("Y{m}")),
                    100,
                    Money::from_minor(100 + 50 * m as i64, currency_of(c)),
                    expiry,
                )
                .unbundled(true);
                offers.push(Offer::from_credential(terms.sign(&isp).unwrap()).unwrap());
            }
        }
        World {
            csc_key: SigningKey::derive(&format!("{tag}/csc")),
            registry,
            payers,
            offers,
            attacker: CheckBook::new(SigningKey::derive(&format!("{tag}/attacker"))),
            today,
        }
    }

    pub fn csc(&self, config: CscConfig) -> ClearingSettlementCenter {
        ClearingSettlementCenter::new(self.csc_key.public_id(), self.registry.clone(), config)
    }

    /// A fresh record of the requested kind.
    pub fn record<R: Rng>(&mut self, rng: &mut R, kind: Kind) -> TransactionRecord {
        let pi = match kind {
            Kind::UnknownGuarantor => 4,
            _ => rng.gen_range(0..4),
        };
        let currency = currency_of(pi);
        let offer = self
            .offers
            .iter()
            .filter(|o| o.currency() == &currency)
            .collect::<Vec<_>>()
            .choose(rng)
            .copied()
            .unwrap()
            .clone();
        let purchased = [25u64, 50, 100][rng.gen_range(0..3)];
        let price = offer.prorated_price(purchased).minor();
        let amount = match kind {
            Kind::OverLimit => 501 + rng.gen_range(0..100),
            Kind::Underpaid => price - 1,
            _ => (price + rng.gen_range(0..20)).min(500),
        };
        let amount = Money::from_minor(amount, currency);
        let merchant = offer.isp_key().clone();
        let date = self.today;
        let payer = &mut self.payers[pi];
        let guarantor = payer.guarantor.credential().clone();
        let check = if kind == Kind::Forged {
            let nonce = self.attacker.fresh_nonce(rng);
            let own = self.attacker.write_check(&merchant, &amount, &nonce, date).unwrap();
            let text = own.credential().render().replace(
                &self.attacker.payer_key().to_string(),
                &payer.book.payer_key().to_string(),
            );
            parse_credential(&text).unwrap()
        } else {
            let nonce = payer.book.fresh_nonce(rng);
            payer.book.write_check(&merchant, &amount, &nonce, date).unwrap().credential().clone()
        };
        let view = Microcheck::from_credential(check.clone()).unwrap();
        TransactionRecord {
            action: payment_action(&offer, &view, purchased, date),
            offer: offer.credential().clone(),
            microcheck: check,
            guarantor,
            merchant_key: merchant,
            received_at: date,
        }
    }

    pub fn random_kind<R: Rng>(rng: &mut R) -> Kind {
        match rng.gen_range(0..100) {
            0..=79 => Kind::Valid,
            80..=84 => Kind::OverLimit,
            85..=89 => Kind::Underpaid,
            90..=94 => Kind::UnknownGuarantor,
            _ => Kind::Forged,
        }
    }
}
