import sys
import json
import logging
import argparse
from typing import Callable, Dict, List, Optional

from src.controller.controller import Controller
from src.model.model import Model
from src.model.core.storage import FileStorage
from src.model.utils.errors import UsageError
from src.model.utils.logger import DEFAULT_LOG_PATH, set_logger

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


class CLIInterface:
    """
    A command-line interface for the video captioning pipeline.

    Subcommands:
    - gen-synth: Generate a synthetic dataset (train/val/test JSON Lines)
    - train: Train a model and save its checkpoint
    - caption: Caption videos with a checkpoint
    - evaluate: Score captions with BLEU@1-4 and CIDEr-D
    - selfcheck: Run the built-in verification suites
    - ablate: Compare decoder variants over several seeds

    Exit codes: 0 on success, 1 on internal failure, 2 on usage or input errors.

    Environment Variables:
        MSAN_THREADS: Caps evaluation parallelism (default 1)

    Attributes:
        parser (ArgumentParser): Command line argument parser
        controller (Controller): Validates arguments and runs the pipeline

    Example Usage:
        cli = CLIInterface()
        sys.exit(cli.run())
    """

    def __init__(self, controller: Optional[Controller] = None):
        self.controller = controller
        self.parser = argparse.ArgumentParser(description="Multimodal semantic attention video captioning")
        self.parser.add_argument('--log-file', default=DEFAULT_LOG_PATH, help='Diagnostic log file')
        self.parser.add_argument('--log-level', default="INFO", help='Root logger level')
        subparsers = self.parser.add_subparsers(dest='command', required=True, help='Pipeline step')

        parser_synth = subparsers.add_parser('gen-synth', help='Generate a synthetic dataset')
        parser_synth.add_argument('--out', required=True, help='Output directory')
        parser_synth.add_argument('--videos', type=int, default=100, help='Number of videos')
        parser_synth.add_argument('--attrs', type=int, default=8, help='Number of latent attributes')
        parser_synth.add_argument('--seed', type=int, default=0, help='Generator seed')
        parser_synth.add_argument('--modalities', default="f,c,o", help='Streams to generate, e.g. f,c,o')
        parser_synth.add_argument('--dim', type=int, default=16, help='Feature dimension of every stream')
        parser_synth.add_argument('--captions', type=int, default=1, help='References per video (1 or 2)')
        parser_synth.add_argument('--noise', type=float, default=0.1, help='Feature noise standard deviation')
        parser_synth.add_argument('--frames', type=int, default=4, help='Sequence length of every stream')

        parser_train = subparsers.add_parser('train', help='Train a model')
        parser_train.add_argument('--data', required=True, help='Dataset directory')
        parser_train.add_argument('--out', required=True, help='Checkpoint path')
        self.__add_config_arguments(parser_train)

        parser_caption = subparsers.add_parser('caption', help='Caption videos')
        parser_caption.add_argument('--ckpt', required=True, help='Checkpoint path')
        parser_caption.add_argument('--data', required=True, help='Dataset file, or directory (test split)')
        parser_caption.add_argument('--beam', type=int, default=5, help='Beam size')
        parser_caption.add_argument('--out', help='JSON Lines output; printed when omitted')

        parser_evaluate = subparsers.add_parser('evaluate', help='Evaluate captions')
        parser_evaluate.add_argument('--ckpt', required=True, help='Checkpoint path')
        parser_evaluate.add_argument('--data', required=True, help='Dataset file, or directory (test split)')
        parser_evaluate.add_argument('--beam', type=int, help='Beam size (default: from the checkpoint config)')
        parser_evaluate.add_argument('--out', help='Report directory (default: next to the checkpoint)')

        parser_selfcheck = subparsers.add_parser('selfcheck', help='Run verification suites')
        parser_selfcheck.add_argument('--suite', action='append', help='Run only this suite (repeatable)')

        parser_ablate = subparsers.add_parser('ablate', help='Compare decoder variants')
        parser_ablate.add_argument('--data', required=True, help='Dataset directory')
        parser_ablate.add_argument('--out', required=True, help='Output directory')
        parser_ablate.add_argument('--seeds', type=int, default=5, help='Seeds per variant')
        parser_ablate.add_argument('--variants', nargs='+',
                                   help='VARIANT[:MODALITIES] items, e.g. uniform msan:f msan:f,c,o')
        self.__add_config_arguments(parser_ablate)

        self.handlers: Dict[str, Callable[[argparse.Namespace], int]] = {
            'gen-synth': self.__gen_synth,
            'train': self.__train,
            'caption': self.__caption,
            'evaluate': self.__evaluate,
            'selfcheck': self.__selfcheck,
            'ablate': self.__ablate,
        }

    @staticmethod
    def __add_config_arguments(parser: argparse.ArgumentParser):
        parser.add_argument('--config', help='Flat JSON config file')
        parser.add_argument('--preset', choices=["full", "synthetic"], help='Base settings')
        parser.add_argument('--modalities', help='Encoded streams, e.g. f,c,o')
        parser.add_argument('--semantic-modalities', help='Streams whose attributes feed the decoder')
        parser.add_argument('--variant', dest='decoder_variant', help='msan, uniform, mean or concat')
        parser.add_argument('--seed', type=int, help='Seed')
        parser.add_argument('--max-epochs', type=int, help='Epoch limit')
        parser.add_argument('--patience', type=int, help='Early-stopping patience')
        parser.add_argument('--precision', help='float64 or float32')

    def __config(self, args: argparse.Namespace):
        return self.controller.resolve_config(
            config_path=args.config,
            preset=args.preset,
            modalities=args.modalities,
            semantic_modalities=args.semantic_modalities,
            decoder_variant=args.decoder_variant,
            seed=args.seed,
            max_epochs=args.max_epochs,
            patience=args.patience,
            precision=args.precision,
        )

    def __gen_synth(self, args: argparse.Namespace) -> int:
        result = self.controller.generate_synthetic(
            args.out, args.videos, args.attrs, args.seed, args.modalities,
            args.dim, args.captions, args.noise, args.frames,
        )
        print(json.dumps(result, indent=2))
        return EXIT_OK

    def __train(self, args: argparse.Namespace) -> int:
        result = self.controller.train(args.data, self.__config(args), args.out)
        print(json.dumps(result, indent=2))
        return EXIT_OK

    def __caption(self, args: argparse.Namespace) -> int:
        rows = self.controller.caption(args.ckpt, args.data, args.beam, args.out)
        if not args.out:
            for row in rows:
                print(json.dumps(row))
        return EXIT_OK

    def __evaluate(self, args: argparse.Namespace) -> int:
        result = self.controller.evaluate(args.ckpt, args.data, args.beam, args.out)
        print(result["report"].to_table())
        return EXIT_OK

    def __selfcheck(self, args: argparse.Namespace) -> int:
        result = self.controller.selfcheck(args.suite)
        for item in result["results"]:
            status = "PASS" if item["passed"] else "FAIL"
            print(f"{status} {item['suite']}: {item['invariant']} ({item['detail']}, {item['seconds']}s)")
        return EXIT_OK if result["passed"] else EXIT_FAILURE

    def __ablate(self, args: argparse.Namespace) -> int:
        summary = self.controller.ablate(args.data, self.__config(args), args.out, args.seeds, args.variants)
        print(json.dumps(summary, indent=2))
        return EXIT_OK

    def run(self, argv: Optional[List[str]] = None) -> int:
        """
        Parses arguments, runs the subcommand and maps errors to exit codes.

        Prints:
            The command's result if successful
            Error message if an exception occurs
        """
        args = self.parser.parse_args(argv)
        try:
            set_logger(args.log_file, args.log_level)
        except (ValueError, OSError) as e:
            print(f"Error: cannot configure logging: {e}", file=sys.stderr)
            return EXIT_USAGE
        if self.controller is None:
            self.controller = Controller(model=Model(storage=FileStorage()))
        try:
            return self.handlers[args.command](args)
        except UsageError as e:
            logging.error(e)
            print(f"Error: {e}", file=sys.stderr)
            return EXIT_USAGE
        except Exception as e:
            logging.exception(e)
            print(f"Error: {e}", file=sys.stderr)
            return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(CLIInterface().run())
