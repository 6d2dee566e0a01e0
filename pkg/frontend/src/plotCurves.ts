#!/usr/bin/env node
/**
 * plot-curves --x {epoch,seconds} files... -o out.png
 *
 * One line per curves.csv file, legend from file names. Exits nonzero with a
 * message on malformed input; never modifies its inputs.
 */

import { readFile } from "node:fs/promises";
import { basename } from "node:path";
import { parseArgs } from "node:util";

import { parseCurveFile } from "./csv";
import { writeImage } from "./render";
import { buildCurvesSvg, CurveXAxis, NamedCurve } from "./svg";

export async function run(argv: string[]): Promise<number> {
  let parsed;
  try {
    parsed = parseArgs({
      args: argv,
      allowPositionals: true,
      options: {
        x: { type: "string", default: "epoch" },
        output: { type: "string", short: "o" },
        help: { type: "boolean", default: false },
      },
    });
  } catch (err) {
    console.error(String(err instanceof Error ? err.message : err));
    return 2;
  }
  if (parsed.values.help) {
    console.log("usage: plot-curves [--x epoch|seconds] files... -o out.png");
    return 0;
  }
  const xAxis = parsed.values.x as string;
  if (xAxis !== "epoch" && xAxis !== "seconds") {
    console.error(`--x must be 'epoch' or 'seconds', got '${xAxis}'`);
    return 2;
  }
  const out = parsed.values.output;
  if (!out) {
    console.error("missing required -o/--output path");
    return 2;
  }
  if (parsed.positionals.length === 0) {
    console.error("no input files given");
    return 2;
  }
  const curves: NamedCurve[] = [];
  for (const file of parsed.positionals) {
    let text: string;
    try {
      text = await readFile(file, "utf8");
    } catch (err) {
      console.error(`cannot read ${file}: ${err instanceof Error ? err.message : err}`);
      return 1;
    }
    try {
      curves.push({ name: basename(file), rows: parseCurveFile(text, file) });
    } catch (err) {
      console.error(String(err instanceof Error ? err.message : err));
      return 1;
    }
  }
  try {
    await writeImage(buildCurvesSvg(curves, xAxis as CurveXAxis), out);
  } catch (err) {
    console.error(`cannot write ${out}: ${err instanceof Error ? err.message : err}`);
    return 1;
  }
  return 0;
}

if (require.main === module) {
  run(process.argv.slice(2)).then((code) => {
    process.exitCode = code;
  });
}
