#!/usr/bin/env python3
"""Trains the desk-scale fixture checkpoint and its byte-level BPE tokenizer.

The engine itself never trains; this script only produces the small GPT-2
family checkpoint that stands in for a pretrained model in the fixtures.
"""

import argparse
import json
import os
import random
import time

import torch
from tokenizers import ByteLevelBPETokenizer, Tokenizer, decoders, models, pre_tokenizers, trainers
from transformers import GPT2Config, GPT2LMHeadModel

EOS = "<|endoftext|>"


def train_tokenizer(texts, vocab_size, out_dir):
    tok = Tokenizer(models.BPE())
    tok.pre_tokenizer = pre_tokenizers.ByteLevel(add_prefix_space=False)
    tok.decoder = decoders.ByteLevel()
    trainer = trainers.BpeTrainer(vocab_size=vocab_size, min_frequency=2,
                                  special_tokens=[EOS], initial_alphabet=[])
    tok.train_from_iterator(texts, trainer)
    tok.model.save(out_dir)
    return ByteLevelBPETokenizer(os.path.join(out_dir, "vocab.json"),
                                 os.path.join(out_dir, "merges.txt"))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--world", required=True)
    ap.add_argument("--out", required=True)
    ap.add_argument("--layers", type=int, default=8)
    ap.add_argument("--d-model", type=int, default=128)
    ap.add_argument("--heads", type=int, default=4)
    ap.add_argument("--vocab", type=int, default=1024)
    ap.add_argument("--epochs", type=int, default=150)
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--lr", type=float, default=2e-3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    random.seed(args.seed)
    torch.manual_seed(args.seed)
    os.makedirs(args.out, exist_ok=True)
    corpus = json.load(open(os.path.join(args.world, "corpus.json")))
    weighted = corpus["docs"] * 3 + corpus["identity"] + corpus["mixed"]
    tok = train_tokenizer(weighted, args.vocab, args.out)
    eos_id = tok.token_to_id(EOS)
    encoded = [tok.encode(t).ids + [eos_id] for t in weighted]
    max_len = max(len(e) for e in encoded)
    print("docs", len(encoded), "max_len", max_len, "vocab", tok.get_vocab_size())

    cfg = GPT2Config(vocab_size=tok.get_vocab_size(), n_positions=128, n_embd=args.d_model,
                     n_layer=args.layers, n_head=args.heads, bos_token_id=eos_id,
                     eos_token_id=eos_id, resid_pdrop=0.0, embd_pdrop=0.0, attn_pdrop=0.0)
    model = GPT2LMHeadModel(cfg)
    opt = torch.optim.AdamW(model.parameters(), lr=args.lr, weight_decay=0.01)
    steps_per_epoch = (len(encoded) + args.batch - 1) // args.batch
    total = steps_per_epoch * args.epochs
    sched = torch.optim.lr_scheduler.OneCycleLR(opt, max_lr=args.lr, total_steps=total,
                                                pct_start=0.05)
    t0 = time.time()
    model.train()
    for epoch in range(args.epochs):
        order = list(range(len(encoded)))
        random.shuffle(order)
        tot, n = 0.0, 0
        for s in range(0, len(order), args.batch):
            batch = [encoded[i] for i in order[s:s + args.batch]]
            L = max(len(b) for b in batch)
            ids = torch.full((len(batch), L), eos_id, dtype=torch.long)
            labels = torch.full((len(batch), L), -100, dtype=torch.long)
            for j, b in enumerate(batch):
                ids[j, :len(b)] = torch.tensor(b)
                labels[j, :len(b)] = torch.tensor(b)
            loss = model(input_ids=ids, labels=labels).loss
            opt.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), 1.0)
            opt.step()
            sched.step()
            tot += loss.item()
            n += 1
        print("epoch %d loss %.4f t=%.0fs" % (epoch, tot / n, time.time() - t0), flush=True)

    model.eval()
    model.save_pretrained(args.out, safe_serialization=True)
    json.dump({"architecture": "gpt2", "n_layers": args.layers, "d_model": args.d_model,
               "n_heads": args.heads, "head_dim": args.d_model // args.heads,
               "d_ff": 4 * args.d_model, "vocab_size": tok.get_vocab_size(),
               "max_context": 128, "norm_epsilon": 1e-5, "eos_token_id": eos_id},
              open(os.path.join(args.out, "model_config.json"), "w"), indent=1)


if __name__ == "__main__":
    main()
