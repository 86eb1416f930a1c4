#!/usr/bin/env python3
"""Produces reference outputs for the engine tests with the `transformers` library.

For each fixture checkpoint this writes golden logits (every position of every
fixture prompt) and golden residual-stream norms. Token ids for the fixture
texts come from the `tokenizers` implementation of the same vocab/merges.
A tiny randomly initialised LLaMA-family checkpoint is created here as well so
both architecture families have a reference.
"""

import argparse
import json
import os
import shutil

import torch
from safetensors.torch import save_file
from tokenizers import Tokenizer, decoders, models, pre_tokenizers
from transformers import GPT2LMHeadModel, LlamaConfig, LlamaForCausalLM

PATCHSCOPE_PROMPT = (
    "Syria: Syria is a country in the Middle East, Leonardo DiCaprio: Leonardo DiCaprio is an "
    "American actor, Samsung: Samsung is a South Korean multinational corporation, x"
)

FIXTURE_PROMPTS = [
    "The spouse of the performer of Imagine is",
    "The performer of Imagine is",
    "The spouse of John Lennon is",
    "The capital of France is",
    "The currency of France is",
    "The mother of John Lennon is",
    "The birthplace of John Lennon is",
    "The spouse of the performer is",
    "The spouse of Imagine is",
    "The country of Paris is",
    "The mayor of Paris is",
    "The capital of the country of Paris is",
    "The birthplace of the performer of Imagine is",
    "The mother of the performer of Imagine is",
    "Samsung: Samsung is a South Korean multinational corporation",
    "Paris: Paris is a city in France, Imagine:",
    "John Lennon: John Lennon is",
    "The author of",
    "x",
    PATCHSCOPE_PROMPT,
]

# Kept to characters the trained vocabulary can represent; the reference
# silently drops the rest while the engine rejects them.
TOKENIZER_TEXTS = FIXTURE_PROMPTS + [
    "",
    "The capital of France is Paris.",
    "  two  spaces and  more   here ",
    "The band, the song: the book.",
    "Founders, mothers: performers.",
]


def load_tokenizer(model_dir):
    tok = Tokenizer(models.BPE.from_file(os.path.join(model_dir, "vocab.json"),
                                         os.path.join(model_dir, "merges.txt")))
    tok.pre_tokenizer = pre_tokenizers.ByteLevel(add_prefix_space=False)
    tok.decoder = decoders.ByteLevel()
    return tok


def golden_logits(model, tok, out_path):
    tensors, ids_out = {}, []
    with torch.no_grad():
        for i, text in enumerate(FIXTURE_PROMPTS):
            ids = tok.encode(text).ids
            out = model(input_ids=torch.tensor([ids]), output_hidden_states=True)
            tensors["prompt_%02d.logits" % i] = out.logits[0].float().contiguous()
            # hidden_states[l] for l < n_layers is the stream entering layer l.
            hs = torch.stack([h[0] for h in out.hidden_states[:-1]])
            tensors["prompt_%02d.residual_norms" % i] = hs.norm(dim=-1).float().contiguous()
            ids_out.append({"text": text, "ids": ids})
    save_file(tensors, out_path)
    return ids_out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--gpt2", required=True, help="trained checkpoint directory")
    ap.add_argument("--out", required=True, help="fixtures/models")
    args = ap.parse_args()
    torch.manual_seed(1234)

    gdir = os.path.join(args.out, "gpt2-tiny")
    ldir = os.path.join(args.out, "llama-tiny")
    os.makedirs(gdir, exist_ok=True)
    os.makedirs(ldir, exist_ok=True)
    for name in ("model.safetensors", "vocab.json", "merges.txt", "model_config.json"):
        shutil.copy(os.path.join(args.gpt2, name), os.path.join(gdir, name))
    tok = load_tokenizer(gdir)

    gpt2 = GPT2LMHeadModel.from_pretrained(args.gpt2).float().eval()
    prompts = golden_logits(gpt2, tok, os.path.join(gdir, "golden.safetensors"))

    gcfg = json.load(open(os.path.join(gdir, "model_config.json")))
    lcfg = LlamaConfig(vocab_size=gcfg["vocab_size"], hidden_size=64, intermediate_size=160,
                       num_hidden_layers=3, num_attention_heads=4, num_key_value_heads=2,
                       max_position_embeddings=128, rms_norm_eps=1e-5, rope_theta=10000.0,
                       tie_word_embeddings=False, attention_bias=False, mlp_bias=False)
    llama = LlamaForCausalLM(lcfg).float().eval()
    with torch.no_grad():
        for p in llama.parameters():
            p.normal_(0.0, 0.08)
        for layer in llama.model.layers:
            layer.input_layernorm.weight.uniform_(0.5, 1.5)
            layer.post_attention_layernorm.weight.uniform_(0.5, 1.5)
        llama.model.norm.weight.uniform_(0.5, 1.5)
    state = {k: v.contiguous() for k, v in llama.state_dict().items()}
    save_file(state, os.path.join(ldir, "model.safetensors"))
    for name in ("vocab.json", "merges.txt"):
        shutil.copy(os.path.join(gdir, name), os.path.join(ldir, name))
    json.dump({"architecture": "llama", "n_layers": 3, "d_model": 64, "n_heads": 4, "head_dim": 16,
               "n_kv_heads": 2, "d_ff": 160, "vocab_size": gcfg["vocab_size"], "max_context": 128,
               "norm_epsilon": 1e-5, "rope_theta": 10000.0, "tie_embeddings": False,
               "eos_token_id": gcfg.get("eos_token_id")},
              open(os.path.join(ldir, "model_config.json"), "w"), indent=1)
    golden_logits(llama, tok, os.path.join(ldir, "golden.safetensors"))

    tokens = [{"text": t, "ids": tok.encode(t).ids,
               "offsets": [list(o) for o in tok.encode(t).offsets]} for t in TOKENIZER_TEXTS]
    json.dump({"prompts": prompts, "tokenizer": tokens},
              open(os.path.join(args.out, "golden_tokens.json"), "w"), indent=1)
    print("wrote", gdir, ldir)


if __name__ == "__main__":
    main()
