#!/usr/bin/env python3
"""Sign a session launch the way an LMS plugin would.

    sign_launch.py --activity ID --key-hex HEX --user-ref REF --origin ORIGIN [--opt-out] [--post BASE_URL]
    sign_launch.py --check fixtures/launch/vectors.json
"""
import argparse
import datetime
import hashlib
import hmac
import json
import secrets
import sys
import urllib.parse
import urllib.request


def canonical(activity_id, user_ref, issued_at, nonce, origin, opt_out):
    return "\n".join([activity_id, user_ref, issued_at, nonce, origin, "true" if opt_out else "false"])


def sign(key, *fields):
    return hmac.new(key, canonical(*fields).encode(), hashlib.sha256).hexdigest()


def pseudonym(salt, user_ref):
    mac = hmac.new(salt, user_ref.encode(), hashlib.sha256).digest()
    return "%012d" % (int.from_bytes(mac[:5], "big") % 10**12)


def now_iso():
    t = datetime.datetime.now(datetime.timezone.utc)
    return t.strftime("%Y-%m-%dT%H:%M:%S.") + "%03dZ" % (t.microsecond // 1000)


def check(path):
    with open(path) as f:
        v = json.load(f)
    r = v["request"]
    key = bytes.fromhex(v["application_key_hex"])
    fields = (r["activity_id"], r["user_ref"], r["issued_at"], r["nonce"], r["origin"], r["opt_out"] == "true")
    ok = canonical(*fields) == v["canonical_string"] and sign(key, *fields) == v["signature_hex"]
    salt = bytes.fromhex(v["pseudonym_salt_hex"])
    ok = ok and all(pseudonym(salt, u) == p for u, p in v["pseudonyms"].items())
    print("vectors ok" if ok else "vectors MISMATCH")
    return 0 if ok else 1


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--check", metavar="VECTORS")
    p.add_argument("--activity")
    p.add_argument("--key-hex")
    p.add_argument("--user-ref")
    p.add_argument("--origin")
    p.add_argument("--opt-out", action="store_true")
    p.add_argument("--post", metavar="BASE_URL", help="submit the form and print the response")
    a = p.parse_args()
    if a.check:
        return check(a.check)
    if not all([a.activity, a.key_hex, a.user_ref, a.origin]):
        p.error("--activity, --key-hex, --user-ref and --origin are required")

    issued_at = now_iso()
    nonce = secrets.token_hex(16)
    sig = sign(bytes.fromhex(a.key_hex), a.activity, a.user_ref, issued_at, nonce, a.origin, a.opt_out)
    form = {
        "user_ref": a.user_ref,
        "issued_at": issued_at,
        "nonce": nonce,
        "origin": a.origin,
        "opt_out": "true" if a.opt_out else "false",
        "signature": sig,
    }
    if not a.post:
        print(json.dumps(form, indent=2))
        return 0
    url = a.post.rstrip("/") + "/activities/" + urllib.parse.quote(a.activity) + "/sessions"
    req = urllib.request.Request(url, data=urllib.parse.urlencode(form).encode(), method="POST")
    try:
        with urllib.request.urlopen(req) as res:
            print(res.status, res.read().decode())
    except urllib.error.HTTPError as e:
        print(e.code, e.read().decode())
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
